fn main() {
    std::process::exit(skycap::cli::run());
}
