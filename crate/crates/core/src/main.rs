fn main() {
    std::process::exit(copyrefine::cli::run(std::env::args_os()));
}
