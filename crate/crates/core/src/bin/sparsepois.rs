fn main() {
    std::process::exit(sparsepois::cli::run_command(std::env::args_os()));
}
