fn main() {
    env_logger::init();
    std::process::exit(gridflow::cli::run(std::env::args_os()));
}
