fn main() {
    std::process::exit(nbv_eval::cli::cli_main(std::env::args_os()));
}
