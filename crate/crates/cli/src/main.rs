use std::io::Write;

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PCDIFF_LOG", "warn")).init();
    let cli = pcdiff::Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = pcdiff::run(cli, &mut out);
    let _ = out.flush();
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
