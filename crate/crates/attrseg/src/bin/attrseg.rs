fn main() {
    std::process::exit(attrseg::cli::run(std::env::args()));
}
