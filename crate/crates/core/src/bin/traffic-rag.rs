fn main() {
    std::process::exit(traffic_rag::cli::run());
}
