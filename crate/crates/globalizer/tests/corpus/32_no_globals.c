typedef int T;
int add(int a, int b);
int add(int a, int b)
{
    T s = a + b;
    return s;
}
