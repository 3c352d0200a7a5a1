#include <cstdio>

int main() {
    std::puts("aria: placeholder");
    return 0;
}
