fn main() {
    std::process::exit(parabolic_spiral::cli::run(std::env::args_os()));
}
