int total;
int next_id(void)
{
    static int n;
    n++;
    total += n;
    return n;
}
