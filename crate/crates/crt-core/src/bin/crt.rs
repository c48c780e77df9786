fn main() {
    std::process::exit(crt_core::run());
}
