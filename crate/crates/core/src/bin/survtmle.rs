fn main() {
    std::process::exit(survtmle::cli::run(std::env::args_os()));
}
