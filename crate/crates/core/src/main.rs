fn main() { std::process::exit(vie_kit::cli::run(std::env::args_os())); }
