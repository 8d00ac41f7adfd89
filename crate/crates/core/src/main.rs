fn main() {
    std::process::exit(buypred::cli::run(std::env::args_os()));
}
