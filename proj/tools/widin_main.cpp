#include <cstdio>
int main() { std::puts("widin: placeholder"); return 0; }
