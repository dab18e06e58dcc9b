fn main() {
    std::process::exit(tinympc::cli::run());
}
