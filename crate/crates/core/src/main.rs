fn main() {
    std::process::exit(molgap_core::cli::run(std::env::args_os()));
}
