fn main() {
    std::process::exit(dglc::cli::run(std::env::args_os()));
}
