enum state { CLOSED, LISTEN };
enum state current;
int CLOSED_count;
void f(void)
{
    current = LISTEN;
    if (current == CLOSED)
        CLOSED_count++;
}
