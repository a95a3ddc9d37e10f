use clap::Parser;

fn main() {
    let args: Vec<std::ffi::OsString> = std::env::args_os().collect();
    if let Ok(cli) = shapeflow_cli::Cli::try_parse_from(&args) {
        env_logger::Builder::new()
            .filter_level(shapeflow_cli::log_filter(&cli))
            .format_timestamp(None)
            .init();
    }
    std::process::exit(shapeflow_cli::run(args));
}
