use clap::Parser;

use rfscope::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
        }
        Err(e) => {
            eprintln!("rfscope: {e}");
            std::process::exit(e.code);
        }
    }
}
