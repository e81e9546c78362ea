use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("KINACT_LOG", "info"))
        .format_timestamp(None)
        .init();
    std::process::exit(kinact::cli::main_with_args(std::env::args_os()));
}
