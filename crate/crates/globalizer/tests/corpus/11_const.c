const int limit = 10;
static const char banner[] = "hello";
int used;
int f(void)
{
    used = limit + banner[0];
    return used;
}
