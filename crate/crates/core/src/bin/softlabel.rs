fn main() {
    std::process::exit(softlabel_core::cli::run());
}
