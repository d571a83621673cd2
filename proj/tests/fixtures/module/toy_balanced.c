struct module {
    int state;
};
typedef _Bool bool;

bool try_module_get(struct module *module);
void module_put(struct module *module);

struct module toy_this_module;
static struct module *toy_owner;
static int toy_users;

static int toy_open(void)
{
    if (!try_module_get(toy_owner))
        return -1;
    toy_users++;
    return 0;
}

static void toy_release(void)
{
    toy_users--;
    module_put(toy_owner);
}

int toy_init(void)
{
    toy_owner = &toy_this_module;
    if (toy_open())
        return -1;
    return 0;
}

void toy_exit(void)
{
    toy_release();
    toy_owner = 0;
}
