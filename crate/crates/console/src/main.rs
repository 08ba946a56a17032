fn main() {
    let code = actgraph_console::cli::run(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
