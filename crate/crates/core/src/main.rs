fn main() {
    std::process::exit(qdspin::cli::run(std::env::args_os()));
}
