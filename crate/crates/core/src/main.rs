fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FLATEXT_LOG"))
        .format_timestamp(None)
        .init();
    std::process::exit(flatext::cli::run_from(std::env::args_os()));
}
