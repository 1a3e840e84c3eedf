fn main() {
    std::process::exit(gridagg::cli::run(std::env::args_os()));
}
