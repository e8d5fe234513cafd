fn main() {
    std::process::exit(agri_contrast::cli::run(std::env::args_os()));
}
