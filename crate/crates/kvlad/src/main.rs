fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KVLAD_LOG", "info"))
        .target(env_logger::Target::Stderr)
        .init();
    let code = kvlad::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
