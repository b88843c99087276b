fn main() {
    std::process::exit(netquant::cli::run(std::env::args_os()));
}
