use clap::Parser;

fn main() {
    let cli = uiss::cli::Cli::parse();
    if let Err(e) = uiss::cli::run(&cli) {
        let cat = e.category();
        let msg = e.to_string().replace('\n', " ");
        let msg = msg.strip_prefix(&format!("{cat}: ")).unwrap_or(&msg);
        eprintln!("error[{cat}]: {msg}");
        std::process::exit(1);
    }
}
