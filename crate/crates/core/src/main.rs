fn main() {
    std::process::exit(evseq::cli::run(std::env::args()));
}
