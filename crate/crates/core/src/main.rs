fn main() {
    std::process::exit(treemix::cli::main_with_args(std::env::args_os()));
}
