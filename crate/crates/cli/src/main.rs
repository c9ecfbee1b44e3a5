use clap::Parser;

fn main() {
    let cli = deskmate_cli::Cli::parse();
    match deskmate_cli::execute(&cli) {
        Ok(out) => {
            print!("{}", out.stdout);
            std::process::exit(out.code);
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
