use clap::Parser;

fn main() {
    if let Err(e) = lap_service::cli::run(lap_service::cli::Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
