fn main() {
    std::process::exit(morse_functor::cli::main());
}
