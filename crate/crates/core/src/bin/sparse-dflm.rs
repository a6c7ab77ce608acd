use std::io::Write;

fn main() {
    let verbose = std::env::args()
        .filter(|a| a == "-v" || a == "--verbose" || a.starts_with("-vv"))
        .count();
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let mut out = std::io::stdout();
    let code = sparse_dflm::cli::run(std::env::args_os(), &mut out);
    let _ = out.flush();
    std::process::exit(code);
}
