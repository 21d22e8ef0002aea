fn main() {
    std::process::exit(gdpnet::cli::run(std::env::args_os()));
}
