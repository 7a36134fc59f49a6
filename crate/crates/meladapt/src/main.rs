fn main() {
    std::process::exit(meladapt::cli::run());
}
