fn main() {
    std::process::exit(advspeech::cli::run(std::env::args()));
}
