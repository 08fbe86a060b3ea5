fn main() {
    let verbose = std::env::args().any(|a| a == "-v" || a == "--verbose");
    let level = if verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).init();
    std::process::exit(scalemix::cli::run(std::env::args_os()));
}
