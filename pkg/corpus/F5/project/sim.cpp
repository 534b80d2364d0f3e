#include <fstream>
#include <iostream>

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: sim <input>\n";
        return 2;
    }
    std::ifstream in(argv[1]);
    double total = 0.0, v;
    while (in >> v) total += v;
    std::cout << "total=" << total << "\n";
    return 0;
}
