fn main() {
    let code = rasnet::cli::run_from(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
