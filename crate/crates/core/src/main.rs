fn main() {
    std::process::exit(mtpenergy::cli::run());
}
