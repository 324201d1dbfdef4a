fn main() {
    std::process::exit(crs_eval::cli::main());
}
