fn main() {
    std::process::exit(kmcnn::cli::run());
}
