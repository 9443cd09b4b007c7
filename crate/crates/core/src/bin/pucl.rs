fn main() {
    std::process::exit(pucl::cli::run(std::env::args_os()));
}
