fn main() {
    std::process::exit(patchrnn::cli::run(std::env::args_os()));
}
