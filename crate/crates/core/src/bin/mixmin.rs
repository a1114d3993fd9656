fn main() {
    std::process::exit(mixmin::cli::main());
}
