use clap::Parser;

fn main() {
    env_logger::init();
    let cli = kindred_cli::Cli::parse();
    if let Err(e) = kindred_cli::run(cli) {
        eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
        std::process::exit(1);
    }
}
