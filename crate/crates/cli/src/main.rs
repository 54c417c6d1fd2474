use clap::Parser;
use levy_parametrix_cli::{run, Cli, EXIT_OK};

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli, std::env::vars()) {
        Ok(done) => {
            if !cli.quiet {
                for w in &done.manifest.warnings {
                    eprintln!("warning: {w}");
                }
                for c in &done.manifest.checks {
                    println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
                println!("config {} -> {}", &done.manifest.config_hash[..12], done.out_dir.display());
            }
            done.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    };
    if code != EXIT_OK {
        std::process::exit(code);
    }
}
