fn main() {
    std::process::exit(milb_core::harness::cli_main(std::env::args_os()));
}
