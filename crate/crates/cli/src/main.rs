use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    env_logger::Builder::new()
        .filter_level(commitshield_cli::log_level(&argv))
        .parse_env("RUST_LOG")
        .target(env_logger::Target::Stderr)
        .init();

    let cancel = Arc::new(AtomicBool::new(false));
    let flag = cancel.clone();
    // first interrupt stops scheduling new work, a second one exits at once
    let _ = ctrlc::set_handler(move || {
        if flag.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
        eprintln!("interrupt: finishing commits in progress (press again to abort)");
    });

    let var = |k: &str| std::env::var(k).ok();
    let mut stdout = std::io::stdout().lock();
    let code = commitshield_cli::run(&argv, commitshield_cli::Env { var: &var, stdout: &mut stdout, cancel });
    std::process::exit(code);
}
