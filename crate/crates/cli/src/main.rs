fn main() {
    std::process::exit(adamore_cli::run(std::env::args_os()));
}
