fn main() {
    std::process::exit(mv_ergo::cli::run(std::env::args_os()));
}
