fn main() {
    std::process::exit(colorcenter::cli::main_with_args(std::env::args()));
}
