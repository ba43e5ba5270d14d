fn main() {
    std::process::exit(sdpkd::cli::run());
}
