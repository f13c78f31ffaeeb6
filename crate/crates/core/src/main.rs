fn main() {
    std::process::exit(fss_absorber::cli::main_with_args(std::env::args_os()));
}
