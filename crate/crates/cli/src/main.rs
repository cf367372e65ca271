fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IKK_LOG", "warn")).init();
    std::process::exit(ikk_cli::main_with(std::env::args_os()));
}
